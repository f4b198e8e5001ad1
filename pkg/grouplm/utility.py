from collections.abc import Iterable
from itertools import product
import logging
import os

from grouplm.exceptions import InvalidInputError

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def enumerate_variables(variables):
    """Cartesian grid over the list-valued entries of ``variables``.

    Scalars (and strings) are held fixed in every grid point, e.g.
    ``{'K': [1, 2], 'sigma_pi': 0.3}`` gives two points. An empty dict gives
    no points; an empty list on any axis raises InvalidInputError.
    """
    swept = {k: list(v) for k, v in variables.items() if isinstance(v, Iterable) and not isinstance(v, str)}
    empty = [k for k, v in swept.items() if not v]
    if empty:
        raise InvalidInputError(f'no values to sweep for {", ".join(empty)}')
    if not variables:
        return []
    fixed = {k: v for k, v in variables.items() if k not in swept}
    return [{**fixed, **dict(zip(swept, combo))} for combo in product(*swept.values())]


def check_and_create_dir(dname):
    if not os.path.isdir(dname):
        os.makedirs(dname)
    return dname


def setup_logging(verbosity=0):
    """Configure the root logger once: WARNING at -1, INFO at 0, DEBUG above."""
    level = logging.INFO if verbosity == 0 else (logging.DEBUG if verbosity > 0 else logging.WARNING)
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=LOG_FORMAT)
    root.setLevel(level)
    return root

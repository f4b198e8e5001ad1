import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()
setuptools.setup(
     name='grouplm',
     version='0.1.0',
     description="Log-linear user models with latent user groups and online adaptation",
     long_description=long_description,
   long_description_content_type="text/markdown",
     packages=['grouplm'],
     install_requires=[
        'numpy>=1.20.0',
        'scipy>=1.6.0',
        'pandas>=1.5.0',
        'statsmodels>=0.10.2',
        'tqdm>=4.41.1',
        ],
     entry_points={
        'console_scripts': ['grouplm=grouplm.cli:main'],
     },
     python_requires='>=3.8',
     classifiers=[
         "Programming Language :: Python :: 3",
         "Programming Language :: Python :: 3.8",
         "Programming Language :: Python :: 3.9",
         "Programming Language :: Python :: 3.10",
         "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
         "Operating System :: OS Independent",
     ],
 )

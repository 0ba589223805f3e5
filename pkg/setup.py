import setuptools


with open('README.md') as f:
    README = f.read()

setuptools.setup(
    name='causalboot',
    license='BSD',
    description='Causal-residual bootstrapping: DAG-aware data augmentation and its Gaussian theory',
    version='0.1.0',
    long_description=README,
    packages=setuptools.find_packages(include=['causalboot', 'causalboot.*']),
    python_requires=">=3.9",
    long_description_content_type="text/markdown",
    install_requires=['torch', 'numpy', 'scipy', 'pandas', 'networkx', 'joblib', 'typer'],
    extras_require={'test': ['pytest']},
    entry_points={'console_scripts': ['causalboot=causalboot.cli:main']},
    classifiers=[
        # Trove classifiers
        # (https://pypi.python.org/pypi?%3Aaction=list_classifiers)
        'Development Status :: 3 - Alpha',
        'License :: OSI Approved :: BSD License',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3.9',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Intended Audience :: Science/Research',
    ],
)

#!/usr/bin/env python3
import os.path
from setuptools import setup, find_packages


# https://packaging.python.org/guides/single-sourcing-package-version/
version = {}
with open(os.path.join("fhe_edge", "version.py")) as fp:
    exec(fp.read(), version)


setup(
    name='fhe-edge',
    version=version["__version__"],
    description='Homomorphic encryption toolkit to protect dense classifiers on edge nodes.',
    long_description=open('README.rst').read(),
    packages=find_packages(exclude=["tests"]),
    license="MIT",
    # Keywords to get found easily on PyPI results,etc.
    keywords="homomorphic encryption, BFV, neural networks, edge computing, privacy",
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Topic :: Security :: Cryptography',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Programming Language :: Python :: 3',
    ],
    install_requires=[
        'numpy>=1.17',
        'scipy>=1.4',
        'sympy>=1.5',
        'scikit-learn>=0.22',
        'requests',
    ],
    extras_require={
        "fast": [
            "numba>=0.48",
        ],
        "dev": [
            "hypothesis",
            "flake8",
            "logassert",
            "pytest",
            "pytest-cov",
            "pytest-benchmark",
        ],
    },
    entry_points={
        "console_scripts": [
            "fhe-edge=fhe_edge.cli:main",
        ],
    },
    python_requires=">=3.8",
)

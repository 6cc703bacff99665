#!/usr/bin/env python
from setuptools import setup
from unlearngraph import __version__


with open('README.md') as fp:
    long_description = fp.read()

setup(
    name='unlearngraph',
    version=__version__,
    description='Error-minimizing structural poisoning of graph datasets',
    long_description=long_description,
    long_description_content_type='text/markdown',
    license='MIT',
    packages=[
        'unlearngraph',
    ],
    python_requires='>=3.6',
    install_requires=[
        'numpy>=1.17',
        'scikit-learn>=0.22',
    ],
    scripts=[
        'tools/emins.py',
    ],
    keywords=[
        'graph neural network',
        'data poisoning',
        'unlearnable examples',
        'graph classification',
    ],
    classifiers=[
        'Development Status :: 4 - Beta',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
)

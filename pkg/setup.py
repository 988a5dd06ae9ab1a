"""
    kgmc
    ~~~~

    Knowledge Graph Map Conflation: match and merge two vector geospatial databases.
"""
import ast
import re

try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup


version_regex = re.compile(r'__version__\s+=\s+(.*)')


def get_version():
    with open('kgmc/__init__.py', 'r') as f:
        return str(ast.literal_eval(version_regex.search(f.read()).group(1)))


def get_long_description():
    with open('README.rst') as f:
        return f.read()


def get_requirements():
    with open('requirements/base.txt') as f:
        return [line.strip() for line in f if line.strip() and not line.startswith(('#', '-r'))]


setup(
    name='kgmc',
    version=get_version(),
    description='Match and merge two vector geospatial databases with knowledge graph embeddings',
    long_description=get_long_description(),
    packages=['kgmc'],
    python_requires='>=3.8',
    install_requires=get_requirements(),
    entry_points={
        'console_scripts': ['kgmc=kgmc.cli:main'],
    },
    classifiers=(
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: GIS'
    )
)

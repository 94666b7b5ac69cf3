#!/usr/bin/env python
import os
import re
from setuptools import setup, find_packages


long_description = open(
    os.path.join(
        os.path.dirname(__file__),
        'README.md'
    )
).read()

with open("fibernet/__init__.py", encoding="utf8") as f:
    version = re.search(r'__version__ = "(.*?)"', f.read()).group(1)

setup(
    name='fibernet',
    version=version,
    license='LICENSE',
    description='Localized orthogonal decomposition for discrete fiber network models',
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages('.', exclude=["*.tests", "*.tests.*", "tests.*", "tests"]),
    python_requires=">=3.8",
    install_requires=[
        "importlib-resources>=5.0; python_version<'3.9'",
        "joblib>=1.3",
        "numpy>=1.22",
        "progressbar2>=3.51.3",
        "scipy>=1.12"
    ],
    extras_require={
        "dev": [
            "autopep8>=1.5.2",
            "mkdocs>=1.1.2",
            "mypy>=1.0",
            "pycodestyle>=2.6.0",
            "PyHamcrest>=2.0.2",
            "behave>=1.2.6"
        ],
    },
    entry_points={
        'console_scripts': [
            'fibernet = fibernet.cli:main',
        ]
    },
    package_data = {
        'fibernet': ['defaults/*.ini'],
    },
    keywords=['multiscale', 'network', 'lod', 'fiber']
)

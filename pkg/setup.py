from setuptools import setup, find_packages

setup(
    name="fbkws",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.26.0",
        "scipy>=1.11.0",
        "soundfile>=0.12.1",
        "pyyaml>=6.0",
        "python-json-logger>=2.0.0",
        "rich>=13.7.0",
        "click>=8.1.7",
    ],
    extras_require={
        "plots": ["matplotlib>=3.8.0"],
    },
    entry_points={
        'console_scripts': [
            'fbkws=fbkws.cli:main',
        ],
    },
    python_requires=">=3.10",
)

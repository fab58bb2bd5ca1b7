from setuptools import setup, find_packages

setup(
    name="pressure-lab",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    include_package_data=True,
    python_requires=">=3.9",
    install_requires=[
        'numpy',
        'scipy',
        'pandas',
        'matplotlib',
        'python-dotenv',
    ],
    extras_require={
        'tools': ['rich'],
    },
    entry_points={
        'console_scripts': [
            'pressure-lab=pressure_lab.cli.commands:main',
        ],
    },
)

from setuptools import find_packages, setup

with open("README.md", "r") as readme:
    long_description = readme.read()

setup(
    name="hetsense",
    version="0.1.0",
    description="Simulator of low-rank matrix sensing trained on data from heterogeneous environments: SGD, pooled gradient descent, the quadratic-network variant, RIP checks and dynamics diagnostics",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests"]),
    include_package_data=True,
    package_data={"hetsense": ["docs/*.md"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU General Public License v3 (GPLv3)",
        "Operating System :: OS Independent",
    ],
    license="GPLv3",
    keywords=[
        "matrix sensing",
        "low-rank",
        "SGD",
        "implicit regularization",
        "heterogeneous data",
        "invariance",
        "RIP",
        "simulation",
    ],
    entry_points={
        "console_scripts": [
            "hetsense=hetsense.__main__:cli_launcher",
        ],
    },
    python_requires=">=3.10",
    install_requires=[
        "fire>=0.6.0",
        "joblib>=1.4.2",
        "tqdm>=4.66.4",
        "rich>=13.8.1",
        "beartype >= 0.19.0",
        "platformdirs >= 4.2.2",
        "pyfiglet >= 1.0.2",  # banner
        "rtoml >= 0.11.0",  # config files and manifest
        "loguru >= 0.7.2",
        "uuid6",  # for time sortable run ids
        "numpy >= 1.26.0",
        "scipy >= 1.13.1",  # svdvals, qr, quadrature
        "pandas >= 2.2.0",  # sweep summaries
        "matplotlib >= 3.8.0",  # optional svg figures
    ],
    extras_require={
        "dev": [
            "black >= 25.1.0",
            "pre-commit >= 4.1.0",
            "pytest >= 8.3.4",
            "build",
            "twine",
        ],
    },
)

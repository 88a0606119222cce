from pathlib import Path
from setuptools import find_packages, setup

requirements = [
    line.strip()
    for line in Path(__file__).with_name("requirements.txt").read_text().splitlines()
    if line.strip() and not line.startswith("pytest")
]

setup(
    name="sbnn-calibration",
    version="0.1.0",
    description="Calibration, sampling and posterior inference for spatial Bayesian neural network priors",
    packages=find_packages(include=["src", "src.*"]),
    python_requires=">=3.10",
    install_requires=requirements,
    extras_require={"test": ["pytest==8.3.4"]},
    entry_points={"console_scripts": ["sbnn=src.main:main"]},
)

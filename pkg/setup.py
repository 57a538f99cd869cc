"""Setup script for the rain package."""

from setuptools import setup, find_packages

setup(
    name="rain-forecast",
    version="0.1.0",
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    install_requires=[
        "numpy>=1.22",
        "torch>=1.13",
        "python-dotenv>=0.19.0",
        "cachetools>=5.0.0",
        "tqdm>=4.60",
    ],
    extras_require={
        "plots": ["matplotlib>=3.5"],
        "test": ["pytest>=7.0", "hypothesis>=6.0"],
    },
    python_requires=">=3.8",
    entry_points={
        "console_scripts": [
            "rain=rain.cli:main",
        ],
    },
    description="Relational hard attention and soft graph attention for particle trajectory forecasting",
    keywords="trajectory-forecasting,graph-attention,double-dqn,relational-inference",
)

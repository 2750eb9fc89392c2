from setuptools import setup

setup(
    name="frame-forge",
    version="0.1.0",
    description="Desk-scale quilted frames, Gabor systems, shift-invariant spaces and sampling",
    python_requires=">=3.9",
    packages=["src"],
    py_modules=["main"],
    install_requires=[
        "numpy>=1.24.0",
        "scipy>=1.10.0",
    ],
    extras_require={
        "test": ["pytest>=7.0.0", "pytest-cov>=4.0.0", "psutil>=5.9.0", "memory-profiler>=0.60.0"],
    },
    entry_points={
        "console_scripts": ["frame-forge=main:main"],
    },
)

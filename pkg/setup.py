from setuptools import setup, find_packages

setup(
    name="fdmod",
    version="1.0.0",
    description="fdmod",
    classifiers=["Development Status :: 2 - Pre-Alpha", "Topic :: Scientific/Engineering :: Physics"],
    keywords=["seismic", "finite-difference", "wave-equation", "benchmark"],
    url="https://github.com/fdmod/fdmod",
    author="fdmod developers",
    license="AGPLv3",
    packages=find_packages(exclude=["tests"]),
    python_requires=">=3.8",
    install_requires=["joblib", "matplotlib", "numpy", "pandas", "scipy", "tqdm"],
    extras_require={"mpi": ["mpi4py"]},
    entry_points={"console_scripts": ["fdmod=fdmod.cli:main"]},
    zip_safe=False,
)

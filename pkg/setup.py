from setuptools import setup, find_packages

setup(
    name="qfal",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    py_modules=["train_qfal", "show_samples"],
    install_requires=["numpy", "matplotlib", "toml", "tqdm", "voluptuous"],
)

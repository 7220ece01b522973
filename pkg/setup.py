from setuptools import setup, find_packages

setup(
    name="dclr-refine",
    version="0.1",
    packages=find_packages(include=["src", "src.*"]),
    install_requires=[
        "numpy",
        "scipy",
        "pandas",
        "pydantic>=2",
        "python-dotenv",
        "safetensors",
    ],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["dclr=src.main:main"]},
    python_requires=">=3.9",
)

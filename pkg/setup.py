from setuptools import find_packages, setup

with open("requirements.txt") as handle:
    requirements = [line.strip() for line in handle if line.strip() and not line.startswith(("#", "pytest"))]

setup(
    name="wgbh",
    version="0.1.0",
    description="Weak Galerkin finite elements for the biharmonic equation on polygonal meshes",
    packages=find_packages(include=["config", "data", "services"]),
    py_modules=["app"],
    install_requires=requirements,
    extras_require={"cholmod": ["scikit-sparse"], "test": ["pytest"]},
    entry_points={"console_scripts": ["wgbh=app:main"]},
    python_requires=">=3.9",
)

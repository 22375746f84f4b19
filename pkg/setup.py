import os

from setuptools import find_packages, setup

# read the contents of the README file
this_directory = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(this_directory, "README.md"), encoding="utf-8") as f:
    long_description = f.read()


requirements = [
    "matplotlib",
    "numpy",
    "open3d",
    "pandas",
    "torch",
]

setup(
    name="ray-surface",
    version="0.1.0",
    description="ray-surface: Self-supervised depth, ego-motion and generic camera "
    "estimation with learned ray surfaces",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    python_requires=">=3.8.0",
    install_requires=requirements,
    entry_points={"console_scripts": ["ray-surface=ray_surface.cli:main"]},
    zip_safe=False,
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    license="MIT",
)

from setuptools import setup, find_packages


with open("README.md", "r", encoding="utf8") as f:
    long_description = f.read()

VERSION = "0.1.0"
setup(
    name="mirrorfield",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    package_data={
        "mirrorfield": ["py.typed"],
    },
    version=VERSION,
    description="Grid radiance fields with traced mirror reflections",
    license="MIT",
    long_description=long_description,
    long_description_content_type="text/markdown",
    keywords=["radiance field", "volume rendering", "mirror", "ray tracing"],
    python_requires=">=3.10",
    install_requires=["numpy", "scipy", "Pillow", "PyYAML", "tqdm"],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["mirrorfield=mirrorfield.harness.cli:main"]},
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Image Processing",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
    ],
)

from setuptools import setup, find_packages

setup(
    name="coastal-waterseg",
    version="0.1.0",
    description="Robust coastal water segmentation with HSV guidance and topology-aware losses",
    license="MIT",
    package_dir={"": "src", "tests": "tests"},
    packages=find_packages("src", "tests"),
    install_requires=["jsons==1.2", "numpy>=1.20", "scipy>=1.7"],
    extras_require={"test": ["hypothesis>=6.0"]},
    entry_points={"console_scripts": ["coastal-waterseg = coastal.waterseg.cli:main"]},
)

from typing import Sequence

from setuptools import find_packages
from setuptools import setup


def get_requirements() -> Sequence[str]:
    with open("requirements.txt") as f:
        return [
            x.strip()
            for x in f.read().split("\n")
            if x.strip() and not x.startswith(("#", "--"))
        ]


setup(
    name="smooth-tail",
    version="0.1.0",
    packages=find_packages(where=".", exclude=["*.tests", "*.tests.*"]),
    package_data={
        "": ["py.typed"],
        "libsmoothtail": ["configuration.yaml", "schemas/*.json"],
    },
    description="Tail index estimation with smoothed log-concave quantiles",
    install_requires=get_requirements(),
    zip_safe=False,
    include_package_data=True,
    entry_points={
        "console_scripts": [
            "smooth-tail=smooth_tail.cli:main",
        ],
    },
    python_requires=">=3.10",
)

from setuptools import setup, find_packages

META_DATA = dict(
    name="irisloc",
    version="0.1.0",
    license="MIT",

    description="Two-stage iris-centre localization, eye tracking and gaze calibration",

    packages=find_packages(exclude=["test", "test.*"]),

    python_requires=">=3.8",
    install_requires=["numpy>=1.20", "scipy", "Pillow>=9.5"],

    entry_points={
        "console_scripts": ["irisloc = irisloc.cli:main"],
    },
)

if __name__ == "__main__":
    setup(**META_DATA)

from setuptools import setup, find_packages

setup(
    name="idn-sample-selector",
    version="0.1.0",
    description="Two-stage clean-sample selection for learning with instance-dependent label noise",
    author="Yury M",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        "numpy",
        "pandas>=1.5",
        "scipy",
        "tomli; python_version<'3.11'",
        "tomli-w",
    ],
    entry_points={
        'console_scripts': [
            'idn-sample-selector=idn_sample_selector.main:main',
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
    ],
    python_requires=">=3.9",
)

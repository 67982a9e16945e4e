"""
Grounded video captioning engine
"""

from setuptools import setup

setup(
    name='groundcap',
    version='0.1.0',
    description=__doc__.strip(),
    long_description=__doc__,
    packages=[
        'groundcap',
        'groundcap.commands',
        'groundcap.model',
        'groundcap.util',
    ],
    package_dir={
        'groundcap': 'groundcap',
    },
    package_data={
        'groundcap': ['data/stopwords.txt'],
    },
    scripts=[
        'scripts/groundcap',
    ],
    python_requires='>=3.8',
    install_requires=[
        'setuptools',
        'numpy>=1.20',
        'scipy>=1.5',
        'sacrebleu>=2.0',
    ],
    tests_require=[
        'pytest',
    ],
    zip_safe=False,
    license='BSD',
)

from setuptools import setup, find_packages

setup(
    name='pycrowdsimpy',
    version='0.1',
    description='A deterministic simulator for context-aware mobile crowdsourcing',
    long_description=open('README.md', encoding='utf-8').read(),
    long_description_content_type='text/markdown',
    license='Apache License 2.0',
    python_requires='>=3.7',
    install_requires=['numpy>=1.21', 'scipy>=1.7'],
    packages=find_packages(exclude=['tests']),
    entry_points={
        'console_scripts': ['pycrowdsim=pycrowdsimpy.Cli:main'],
    },
    classifiers=[
        'License :: OSI Approved :: Apache Software License',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Topic :: Scientific/Engineering',
        'Natural Language :: Japanese',
    ],
)

from setuptools import setup

long_description = \
"""
Contains tools for:
- Simulating a team of UAVs covering a field from a discrete 3-D grid
- Solving small linear programs with a dense two-phase simplex
- Correlated-equilibrium joint-action selection for cooperative Q-learning
- Training with FSR, RBF or tabular approximations of the joint Q-function
"""


CLASSIFIERS = ['Topic :: Scientific/Engineering :: Artificial Intelligence',
                'Intended Audience :: Science/Research',
                'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
                'Natural Language :: English',
                'Programming Language :: Python :: 3']


setup(
    name="coveragemarl",
    version=1.0,

    install_requires=['numpy', 'pandas', 'scipy', 'tqdm', 'psutil', 'h5py', 'pyyaml'],

    setup_requires=["pytest-runner"],
    tests_require=["pytest"],
    include_package_data=True,

    package_data={'': ['*.md'],
        # Shipped scenarios and their field masks
        'coveragemarl': ['scenarios/*.yaml', 'scenarios/*.txt'],
    },

    packages = ['coveragemarl'],

    entry_points={'console_scripts': ['coveragemarl = coveragemarl.ExperimentRunner:main']},

    classifiers = CLASSIFIERS,

    description="Multi-agent correlated-equilibrium Q-learning for UAV field coverage",
    long_description=long_description,
    license="GPLv3",
    python_requires='>=3.7',
)

"""setup.py file for the package ``CoPert``.

The PyPi project name and the package name are both ``CoPert``.

"""

import os
import sys
from setuptools import find_packages, setup

from CoPert import __version__, __test_version__


# Choose the correct version based on script's arg
if len(sys.argv) > 1 and sys.argv[1] == "testing":
    VERSION = __test_version__
    # Remove "testing" from args so setup doesn't process "testing" as a cmd
    sys.argv.remove("testing")
else:
    VERSION = __version__

# Directory of this file
dirpath = os.path.abspath(os.path.dirname(__file__))

# The text of the README file (used on PyPI)
with open(os.path.join(dirpath, "README_pypi.rst"), encoding="utf-8") as f:
    README = f.read()

# The text of the requirements.txt file
with open(os.path.join(dirpath, "requirements.txt")) as f:
    REQUIREMENTS = [line.strip() for line in f if line.strip()]


setup(name='CoPert',
      version=VERSION,
      description='Cross-fitted estimators of average perturbation effects of '
                  'compositional covariates, with confidence intervals.',
      long_description=README,
      long_description_content_type='text/x-rst',
      classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Mathematics',
        'Topic :: Scientific/Engineering :: Bio-Informatics',
      ],
      keywords='compositional data simplex causal inference semiparametric '
               'double machine learning microbiome',
      license='GPLv3',
      packages=find_packages(exclude=['tests']),
      include_package_data=True,
      install_requires=REQUIREMENTS,
      python_requires='>=3.7',
      entry_points={
          'console_scripts': ['copert=CoPert.run_copert:main']
      },
      zip_safe=False)

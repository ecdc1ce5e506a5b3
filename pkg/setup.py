from setuptools import setup


def readme():
    with open('README.md') as f:
        return f.read()


setup(name='orthogonal_cut',
      version='0.1.0',
      description='Orthogonal-Cut relaxation and Gaussian polar rounding for the little '
                  'Grothendieck problem over O(d), U(d) and Stiefel manifolds',
      long_description=readme(),
      long_description_content_type='text/markdown',
      classifiers=[
          'Programming Language :: Python :: 3',
          'License :: OSI Approved :: MIT License',
          'Operating System :: OS Independent',
      ],
      keywords='little grothendieck problem, orthogonal cut, semidefinite relaxation, '
               'procrustes, synchronization, rounding',
      license='LICENSE',
      packages=['orthogonal_cut', 'orthogonal_cut.tests'],
      python_requires='>=3.7',
      install_requires=[
          'numpy',
          'scipy',
          'pytest',
          'joblib',
          'tqdm',
          'pandas',
      ],
      entry_points={
          'console_scripts': ['orthocut=orthogonal_cut.cli:main'],
      },
      include_package_data=True,  # to include non .py-files listed in MANIFEST.in
      zip_safe=False)

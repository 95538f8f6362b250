"""
implant_mamba packaging
"""
from setuptools import setup, find_packages

# 第三方依赖
requires = [
    "construct>=2.10.56",
    'click>=7.1.2',
    'coloredlogs>=3.3.2',
    'numpy>=1.21',
    'numba>=0.56',
]
setup(name='implant_mamba',
      version="0.1.0",
      description='Hybrid CNN + selective-scan implant position and slope prediction on synthetic volumes',
      packages=find_packages(exclude=('test', 'test.*', 'examples', 'examples.*')),
      long_description=open('README.md', encoding='utf8').read(),
      long_description_content_type="text/markdown",
      platforms=["any"],
      python_requires='>=3.8',
      install_requires=requires,  # 第三方库依赖
      extras_require={'test': ['pytest>=7.0']},
      entry_points={
          'console_scripts': {
              'implant-mamba=implant_mamba.main:cli'
          }
      },
      )

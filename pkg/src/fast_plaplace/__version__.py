#!/usr/bin/env python3
import os

def init_version() -> str:
  ## Source checkouts read the manifest; installed builds ask the package metadata
  init = os.path.join(os.path.dirname(__file__), '../../pyproject.toml')
  if os.path.exists(init):
    with open(init) as fid:
      data = fid.readlines()
    version_line = next(line for line in data if line.startswith('version ='))
    version = version_line.strip().split(' = ')[1]
    return version.replace('"', '').replace("'", '')
  from importlib.metadata import version, PackageNotFoundError
  try:
    return version("fast-plaplace")
  except PackageNotFoundError:
    return "0+unknown"

__version__ = init_version()

if __name__ == "__main__":
  print(__version__)

# Copyright (c) Microsoft. All rights reserved.

from importlib.metadata import version

__version__ = version("selfplay-ail")

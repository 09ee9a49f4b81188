# Copyright (c) Microsoft. All rights reserved.

"""Batch runs, artifacts, artifact comparison and the property suite."""

# Copyright (c) Microsoft. All rights reserved.

"""Self-play loop, its duality gap and the loss-based trainers built on it."""

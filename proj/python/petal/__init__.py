"""Subject-aware temporal action localization."""

from ._petal import *  # noqa: F401,F403
from ._petal import __doc__  # noqa: F401

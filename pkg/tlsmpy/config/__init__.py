from .core import *
from .schema import *

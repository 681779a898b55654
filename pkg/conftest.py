import os
import sys

# allow running the suite straight from a checkout; an installed package wins
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

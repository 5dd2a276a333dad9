"""
Allow `python -m entdim`
"""
import sys

from entdim.main import main

sys.exit(main())

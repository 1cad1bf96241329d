# Sketchwrap: safety wrapper turning trajectory sketches into verified MPC plans

__version__ = '0.1.0'

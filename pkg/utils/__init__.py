"""
Utility modules for geocert: error handling and report emission
"""

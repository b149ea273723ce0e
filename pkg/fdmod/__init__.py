"""
© 2026, fdmod developers
"""

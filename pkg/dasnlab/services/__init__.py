"""
Services package - contains business logic modules.
"""

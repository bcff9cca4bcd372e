"""
Endpoints HTTP: calculador de estabilidad y experimentos
"""

"""
Servicios de filtrado, estabilidad y experimentos
"""

"""
Bucy Lab: filtros de Kalman-Bucy extendidos y sus aproximaciones por partículas
"""

"""
Utilidades: momentos exactos, semillas, exportación, logging y errores
"""

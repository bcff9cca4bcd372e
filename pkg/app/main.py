"""
Aplicación principal FastAPI
"""
from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app.config import settings
from app.database import init_db
from app.api import experiments, stability
from app.utils.logging import setup_logging

# Crear aplicación
app = FastAPI(
    title=settings.APP_NAME,
    version=settings.VERSION,
    description="API para filtros de Kalman-Bucy extendidos, su difusión McKean-Vlasov y el En-EKF",
)

# Configurar CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Incluir routers
app.include_router(stability.router, prefix="/api/stability", tags=["stability"])
app.include_router(experiments.router, prefix="/api/experiments", tags=["experiments"])


@app.on_event("startup")
async def startup_event():
    """Inicializar logging y registro al arrancar"""
    setup_logging()
    init_db()


@app.get("/")
async def root():
    """Endpoint raíz"""
    return {
        "name": settings.APP_NAME,
        "version": settings.VERSION,
        "status": "running"
    }


@app.get("/health")
async def health_check():
    """Health check"""
    return {"status": "healthy"}

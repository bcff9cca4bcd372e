"""
Fixtures compartidas: problemas de prueba, base en memoria y cliente HTTP
"""
import os

os.environ.setdefault("DATABASE_URL", "sqlite://")

import numpy as np
import pytest
from fastapi.testclient import TestClient
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

from app.database import Base, get_db
from app.main import app
from app.services.model_service import (
    CubicPotentialSpec, FilteringProblem, ModelService, QuadraticPotentialSpec,
)
from app.utils.rng import StreamFactory


def quadratic_problem(Q1=4.0, sigma1=1.0, b=1.0, sigma2=1.0, x0=0.0, P0=0.1, beta=1.0):
    """Langevin cuadrático escalar; con Q1 = 4 da λ_∂A = 8"""
    signal = ModelService.build_quadratic_langevin(
        QuadraticPotentialSpec(Q1=np.array([[Q1]]), q=None, beta=beta, sigma1=sigma1))
    sensor = ModelService.fully_observed_sensor(1, b, sigma2)
    return FilteringProblem(signal=signal, sensor=sensor, x0_mean=np.array([x0]), P0=np.array([[P0]]))


@pytest.fixture
def scalar_problem():
    return quadratic_problem()


@pytest.fixture
def linear_problem():
    """Señal lineal 2D con sensor parcial"""
    A = np.array([[-1.0, 0.3], [0.0, -2.0]])
    signal = ModelService.build_linear(A, 0.25 * np.eye(2))
    sensor = ModelService.fully_observed_sensor(2, 1.0, 0.5)
    return FilteringProblem(signal=signal, sensor=sensor, x0_mean=np.array([1.0, -1.0]), P0=0.2 * np.eye(2))


@pytest.fixture
def cubic_problem():
    signal = ModelService.build_cubic_langevin(CubicPotentialSpec(
        Q1=2.0 * np.eye(2), Q2=np.eye(2), q=None, beta=1.0, sigma1=0.5))
    sensor = ModelService.fully_observed_sensor(2)
    return FilteringProblem(signal=signal, sensor=sensor, x0_mean=np.zeros(2), P0=0.1 * np.eye(2))


@pytest.fixture
def streams():
    return StreamFactory(20240611)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def db_session():
    """Sesión SQLite en memoria con las tablas del registro"""
    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    from app.models import run  # noqa: F401
    Base.metadata.create_all(bind=engine)
    Session = sessionmaker(autocommit=False, autoflush=False, bind=engine)
    session = Session()
    try:
        yield session
    finally:
        session.close()
        engine.dispose()


@pytest.fixture
def client(db_session):
    """TestClient con la base en memoria"""
    def override_get_db():
        yield db_session

    app.dependency_overrides[get_db] = override_get_db
    with TestClient(app) as test_client:
        yield test_client
    app.dependency_overrides.clear()


@pytest.fixture
def base_document(tmp_path):
    """Documento mínimo de experimento con salida en tmp_path"""
    return {
        "experiment": "stability-report",
        "model": {"family": "quadratic", "Q1": [[4.0]], "beta": 1.0, "sigma1": 1.0},
        "sensor": {"b": 1.0, "sigma2": 1.0},
        "initial": {"x0_mean": [0.0], "P0": [[0.1]]},
        "numerics": {"dt": 0.01, "T": 1.0},
        "seed": 42,
        "output_dir": str(tmp_path),
    }

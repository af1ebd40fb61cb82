"""Neural-operator forecasting toolkit: CFD data generation, AFNO and
latent-DeepONet forecasters, and masked lead-time evaluation."""

__version__ = "0.1.0"

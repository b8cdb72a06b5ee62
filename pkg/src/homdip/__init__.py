"""Hong-Ou-Mandel interference of independent weak coherent pulses: model, simulator, analysis."""
__version__ = "0.1.0"

"""Tariff allocation toolkit: consumer simulation, quantile load forecasting and greedy allocation."""

"""Matrix product operator restricted Boltzmann machines."""

"""Neural network stack: reverse-mode autograd with the layers and optimizers built on it."""

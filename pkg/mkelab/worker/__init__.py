# Worker module

"""Point-light motion perception toolkit."""

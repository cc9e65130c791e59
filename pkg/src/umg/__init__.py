"""Universal material generator workbench."""

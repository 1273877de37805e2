# Carbonforge Tests

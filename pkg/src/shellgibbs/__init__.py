"""GOY/SABRA shell models and their Gaussian Gibbs measures."""

__version__ = "0.1.0"

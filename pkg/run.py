"""
Command-line entry point.
"""
import os
from dasnlab import create_cli
from dasnlab.config import DevelopmentConfig, ReferenceConfig, TestingConfig

# Determine configuration based on environment
env = os.environ.get('DASN_ENV', 'development')

if env == 'reference':
    config_class = ReferenceConfig
elif env == 'testing':
    config_class = TestingConfig
else:
    config_class = DevelopmentConfig

cli = create_cli(config_class)

if __name__ == '__main__':
    cli()

#!/usr/bin/env python
"""
startup script for the experiment command line.
"""
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from app.main import cli  # noqa: E402

if __name__ == "__main__":
    cli()

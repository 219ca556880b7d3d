"""Allow ``python -m chattymaps``."""

from chattymaps.cli import main

raise SystemExit(main())

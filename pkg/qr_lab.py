#!/usr/bin/env python3
"""
Command-line entry point for the Quasiregular Dynamics Lab.

    python qr_lab.py verify-schroder --format text
    python qr_lab.py render-julia --config campaigns/default.toml --plots
"""

import sys
sys.path.append('src')

from qr_cli import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\n⚠️ Run interrupted by user")
        sys.exit(130)
    except Exception as e:
        print(f"\n❌ Error occurred: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)

from wrapify.cli import main
import sys
sys.exit(main())

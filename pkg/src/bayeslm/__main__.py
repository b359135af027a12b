from bayeslm.cli import main

raise SystemExit(main())

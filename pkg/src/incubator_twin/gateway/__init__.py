"""HTTP/WebSocket gateway between the bus, the data log, and the dashboard."""
